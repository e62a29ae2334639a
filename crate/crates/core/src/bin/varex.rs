fn main() {
    std::process::exit(varex::cli::run(std::env::args_os()));
}
