fn main() {
    std::process::exit(counterflow::cli::run(std::env::args_os()));
}
