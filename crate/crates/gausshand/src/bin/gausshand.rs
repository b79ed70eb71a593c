fn main() {
    std::process::exit(gausshand::cli::run(std::env::args_os()));
}
