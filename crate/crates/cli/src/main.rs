fn main() {
    std::process::exit(fla_cli::run_main());
}
