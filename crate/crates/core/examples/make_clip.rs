use choreo_core::data::*;
fn main() {
    let g = GenreLabel::new(0, 3).unwrap();
    let (motion, _) = synth_dance(&g, 3, 8, 1234).unwrap();
    let clip = MotionSequence::new(4, C_D, FPS, motion.data[..4 * C_D].to_vec());
    let corpus = Corpus { records: vec![Record::TextPaired { template: 0, motion: clip }], c_d: C_D, c_m: C_M, fps: FPS, n_genres: 0, n_templates: 0 };
    write_corpus(std::path::Path::new("/tmp/e2e/clip.bin"), &corpus).unwrap();
    println!("clip written");
}
