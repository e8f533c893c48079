fn main() {
    std::process::exit(mgc::cli::run(std::env::args_os()));
}
