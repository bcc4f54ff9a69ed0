fn main() {
    std::process::exit(zigzag_sampling::harness::cli::run());
}
