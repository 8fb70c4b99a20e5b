fn main() {
    std::process::exit(planar_mk::cli::run(std::env::args_os()));
}
