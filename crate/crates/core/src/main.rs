fn main() {
    std::process::exit(dialog_bandit::cli::main_with_args(std::env::args_os()));
}
