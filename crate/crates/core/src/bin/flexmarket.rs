fn main() {
    flexmarket::cli::init_logging();
    std::process::exit(flexmarket::cli::main_with_args(std::env::args_os()));
}
