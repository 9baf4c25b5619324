fn main() {
    let t = fflc_core::synth::canonical_template_from_painter();
    print!("{}", t.to_text());
}
