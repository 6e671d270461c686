fn main() {
    std::process::exit(rar_sim::cli::main_with_args(std::env::args_os()));
}
