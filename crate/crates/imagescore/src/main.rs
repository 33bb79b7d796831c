fn main() {
    std::process::exit(imagescore::cli::run());
}
