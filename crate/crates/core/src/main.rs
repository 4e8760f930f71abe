fn main() {
    std::process::exit(augarena::cli::run(std::env::args_os()));
}
