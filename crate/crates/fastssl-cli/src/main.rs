fn main() {
    std::process::exit(fastssl_cli::run_command(std::env::args_os()));
}
