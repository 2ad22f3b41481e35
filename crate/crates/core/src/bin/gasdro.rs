fn main() {
    std::process::exit(gasdro::cli::run(std::env::args_os()));
}
