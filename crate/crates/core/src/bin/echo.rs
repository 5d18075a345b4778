//! Reference wire-protocol server: echoes interventions back as observations.

fn main() {
    let stdin = std::io::stdin();
    if let Err(e) = causescope::execution::adapter::serve(
        stdin.lock(),
        std::io::stdout().lock(),
        causescope::execution::adapter::echo,
    ) {
        eprintln!("causescope-echo: {e}");
        std::process::exit(2);
    }
}
