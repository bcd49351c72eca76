fn main() {
    std::process::exit(robustvol::cli::run(std::env::args_os()));
}
