fn main() {
    std::process::exit(gaitdiff_cli::main_with(std::env::args_os()));
}
