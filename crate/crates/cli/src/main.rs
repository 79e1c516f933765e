fn main() {
    std::process::exit(levelset_cli::commands::run(std::env::args_os()));
}
