fn main() {
    std::process::exit(lidreid::cli::run_from(std::env::args_os()));
}
