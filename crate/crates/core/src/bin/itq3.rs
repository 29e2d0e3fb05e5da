fn main() {
    std::process::exit(itq3::cli::run(std::env::args_os()));
}
