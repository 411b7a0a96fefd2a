fn main() {
    use facegan::data::synth::{synth_generate, SyntheticSpec};
    let spec = SyntheticSpec {
        num_identities: 16,
        poses_per_identity: vec![0.0, 30.0, -30.0, 60.0, -60.0],
        resolution: 32,
        seed: 1,
    };
    let m = synth_generate(&spec, std::path::Path::new("/tmp/synth_check")).unwrap();
    println!("records: {}", m.records.len());
    // Compose a contact sheet: 4 identities x 5 poses, upscaled 4x.
    let mut sheet = image::RgbImage::new(5 * 32 * 4, 4 * 32 * 4);
    for id in 0..4u32 {
        for (p, _) in spec.poses_per_identity.iter().enumerate() {
            let img = image::open(format!("/tmp/synth_check/id{:03}_p{:02}.png", id, p)).unwrap().to_rgb8();
            for y in 0..32u32 { for x in 0..32u32 {
                let px = *img.get_pixel(x, y);
                for dy in 0..4 { for dx in 0..4 {
                    sheet.put_pixel((p as u32 * 32 + x) * 4 + dx, (id * 32 + y) * 4 + dy, px);
                }}
            }}
        }
    }
    sheet.save("/tmp/synth_sheet.png").unwrap();
    println!("sheet written");
}
