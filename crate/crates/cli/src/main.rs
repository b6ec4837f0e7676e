fn main() {
    std::process::exit(platsim_cli::run(std::env::args_os()));
}
