fn main() {
    std::process::exit(lisaliency::cli::run(std::env::args_os()));
}
