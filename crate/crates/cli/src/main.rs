fn main() {
    std::process::exit(heston_cli::run(std::env::args_os()));
}
