fn main() {
    std::process::exit(predcodec::cli::run(std::env::args_os()));
}
