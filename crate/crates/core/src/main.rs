fn main() {
    std::process::exit(lngeom::cli::run(std::env::args_os()));
}
