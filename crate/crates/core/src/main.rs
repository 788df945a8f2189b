fn main() {
    std::process::exit(dualmerge::cli::run(std::env::args_os()));
}
