fn main() {
    std::process::exit(photonforge::cli::run(std::env::args_os()));
}
