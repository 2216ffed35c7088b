fn main() {
    std::process::exit(smallgain::cli::main());
}
