fn main() {
    std::process::exit(gazeload_cli::run(std::env::args_os()));
}
