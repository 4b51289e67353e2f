fn main() {
    std::process::exit(nnspeech::cli::run(std::env::args_os()));
}
