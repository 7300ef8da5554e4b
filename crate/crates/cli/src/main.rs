fn main() {
    std::process::exit(ambient_cli::run(std::env::args_os()));
}
