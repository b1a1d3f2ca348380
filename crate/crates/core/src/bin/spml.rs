fn main() {
    std::process::exit(spml_core::cli::run(std::env::args_os()));
}
