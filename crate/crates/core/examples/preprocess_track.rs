//! From AlphaPose-style keypoints to normalized, segmented, smoothed 2D input.

use cmas::preprocess::{
    discontinuities, filter_low_confidence, gaussian_smooth, normalize, parse_alphapose, segment_discontinuities,
    JointMapping, NormalizeOptions,
};
use cmas::{make_rig, RigParams};

fn keypoints(frame: usize) -> String {
    // a COCO-17 person drifting right, with a tracker swap at frame 12
    let shift = if frame >= 12 { 400.0 } else { 3.0 * frame as f64 };
    let base = [
        (320.0, 100.0), (310.0, 95.0), (330.0, 95.0), (300.0, 100.0), (340.0, 100.0),
        (290.0, 150.0), (350.0, 150.0), (280.0, 210.0), (360.0, 210.0), (275.0, 260.0),
        (365.0, 260.0), (300.0, 270.0), (340.0, 270.0), (300.0, 350.0), (340.0, 350.0),
        (300.0, 430.0), (340.0, 430.0),
    ];
    let values: Vec<String> = base
        .iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let conf = if k == 9 && frame.is_multiple_of(5) { 0.2 } else { 0.9 };
            format!("{},{},{}", x + shift, y, conf)
        })
        .collect();
    format!("{{\"keypoints\":[{}]}}", values.join(","))
}

fn main() -> cmas::Result<()> {
    let text = format!("[{}]", (0..20).map(keypoints).collect::<Vec<_>>().join(","));
    let track = parse_alphapose(&text, &JointMapping::coco17_to_human13())?;
    println!("{} frames x {} joints", track.frames(), track.joints());

    let filtered = filter_low_confidence(&track, 0.3);
    println!("masked after confidence filter: {}", filtered.masked_count());

    let rig = make_rig(7, &RigParams::default(), 0)?;
    let (normalized, norm) = normalize(&filtered, rig.reference(), &NormalizeOptions::default())?;
    println!("normalization: scale {:.5}, offset {:?}", norm.scale, norm.offset);

    println!("cuts before frames {:?}", discontinuities(&normalized, 0.5));
    for seg in segment_discontinuities(&normalized, 0.5) {
        let smooth = gaussian_smooth(&seg, 1.0);
        println!(
            "segment starting at frame {} with {} frames, {} still masked after smoothing",
            seg.start_frame,
            seg.frames(),
            smooth.masked_count()
        );
    }
    Ok(())
}
