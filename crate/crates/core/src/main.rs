fn main() {
    std::process::exit(maslov_stab::cli::run(std::env::args_os()));
}
