fn main() {
    std::process::exit(poseval_cli::run(std::env::args_os()));
}
