use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::agent::EpisodeTrace;
use crate::error::{Error, Result};
use crate::world::{PushAction, Scene};

/// Fill colour of an object, a function of class and instance only.
pub fn object_color(class_id: u8, instance_id: u8) -> String {
    let hue =
        (class_id as u32 * 360 / crate::dataset::NUM_CLASSES as u32 + 7 * instance_id as u32) % 360;
    let light = 45 + 10 * (instance_id as u32 % 3);
    format!("hsl({hue},65%,{light}%)")
}

/// One frame: objects drawn bottom to top, members of `target` outlined,
/// and `action` (the push about to happen) drawn as an arrow.
pub fn render_scene(scene: &Scene, target: Option<u8>, action: Option<&PushAction>) -> String {
    let (w, h) = (scene.bin.width, scene.bin.height);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="448" height="{}">"#,
        (448.0 * h / w).round()
    );
    let _ = writeln!(
        svg,
        r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#f4f1ea" stroke="#333" stroke-width="0.5"/>"##
    );
    let mut order: Vec<_> = scene.objects.iter().collect();
    order.sort_by_key(|o| (o.z, o.id));
    for o in order {
        let points: Vec<String> = o
            .world_footprint()
            .vertices()
            .iter()
            .map(|v| format!("{:.3},{:.3}", v.x, v.y))
            .collect();
        let (stroke, width) = if Some(o.class_id) == target {
            ("#d00", 0.9)
        } else {
            ("#222", 0.3)
        };
        let _ = writeln!(
            svg,
            r#"<polygon id="obj{}" points="{}" fill="{}" stroke="{stroke}" stroke-width="{width}"/>"#,
            o.id,
            points.join(" "),
            object_color(o.class_id, o.instance_id)
        );
    }
    if let Some(&PushAction::Push {
        row,
        col,
        direction,
    }) = action
    {
        let from = scene.bin.cell_center(row as usize, col as usize);
        let to = from + direction.unit() * scene.bin.push_length();
        let _ = writeln!(
            svg,
            r##"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#06c" stroke-width="0.8"/>"##,
            from.x, from.y, to.x, to.y
        );
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.3}" cy="{:.3}" r="1.2" fill="#06c"/>"##,
            from.x, from.y
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Frames for the initial scene and after every action.
pub fn render_frames(trace: &EpisodeTrace) -> Vec<String> {
    let target = Some(trace.question.obj1);
    trace
        .replay()
        .iter()
        .enumerate()
        .map(|(i, s)| render_scene(s, target, trace.actions.get(i)))
        .collect()
}

/// Plain-text log of actions and rewards.
pub fn action_log(trace: &EpisodeTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "question: {}", trace.question.text);
    let _ = writeln!(out, "seed: {}", trace.seed);
    for (i, a) in trace.actions.iter().enumerate() {
        let _ = write!(out, "step {i}: {a}");
        if let Some(r) = trace.rewards.get(i) {
            let _ = write!(out, " reward={:.6} beta={:.3}", r.total, r.beta);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "pushes: {}", trace.pushes());
    match trace.answer {
        Some(a) => {
            let _ = writeln!(out, "answer: {a}");
        }
        None => out.push_str("answer: none\n"),
    }
    out
}

/// Writes `frame_NNN.svg` files and `actions.txt` into `dir`, returning
/// the frame count.
pub fn write_replay(trace: &EpisodeTrace, dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frames = render_frames(trace);
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:03}.svg"));
        fs::write(&path, f).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("actions.txt");
    fs::write(&path, action_log(trace)).map_err(|e| Error::io(&path, e))?;
    Ok(frames.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_catalog, generate_scene, Difficulty, Question};
    use crate::harness::random_policy;
    use crate::reward::RewardConfig;

    #[test]
    fn one_frame_per_scene_and_pure() {
        let cat = build_catalog(0);
        let scene = generate_scene(&cat, Difficulty::Easy, 3).unwrap();
        let q = Question::counting(scene.objects[0].class_id, &cat);
        let mut rng = crate::rng::from_seed(1);
        let trace = random_policy(&scene, &q, 5, &RewardConfig::default(), &mut rng).unwrap();
        let frames = render_frames(&trace);
        assert_eq!(frames.len(), trace.actions.len() + 1);
        assert_eq!(
            frames,
            render_frames(&EpisodeTrace::from_json(&trace.to_json()).unwrap())
        );
        for f in &frames {
            assert!(f.starts_with("<svg") && f.ends_with("</svg>\n"));
            assert_eq!(f.matches("<polygon").count(), scene.objects.len());
        }
        let log = action_log(&trace);
        assert_eq!(
            log.lines().filter(|l| l.starts_with("step ")).count(),
            trace.actions.len()
        );
    }
}
