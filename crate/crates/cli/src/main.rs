fn main() {
    std::process::exit(salmon_cli::run(std::env::args_os()));
}
