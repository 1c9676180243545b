fn main() {
    std::process::exit(emoedge::cli::run(std::env::args_os()));
}
