fn main() {
    std::process::exit(raceline::cli::run(std::env::args().skip(1).collect()));
}
