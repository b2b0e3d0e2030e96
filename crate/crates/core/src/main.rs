fn main() {
    std::process::exit(stylebridge::cli::run(std::env::args_os()));
}
