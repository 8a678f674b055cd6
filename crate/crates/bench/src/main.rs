use clap::Parser;
use hevmpc_bench::args::{Cli, Command};
use hevmpc_bench::{commands, CliResult, EXIT_OK};

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::TuneRho(a) => commands::tune_rho(a),
        Command::Sweep(a) => commands::sweep(a).map(|_| ()),
        Command::Traj(a) => commands::traj(a),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
