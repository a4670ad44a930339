fn main() {
    std::process::exit(relay_aoi::cli::run());
}
