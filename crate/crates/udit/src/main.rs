fn main() {
    std::process::exit(udit::cli::run(std::env::args_os()));
}
