use std::fs;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::commands::CliError;

/// Markdown flag reference for every visible subcommand.
pub fn flag_reference() -> String {
    let mut root = Cli::command();
    root.build();
    let mut out = String::from("# quirky command-line reference\n\n");
    out.push_str("Generated by `quirky docs`; do not edit by hand.\n\n");
    out.push_str(&format!("```text\n{}```\n", root.render_long_help()));
    for sub in root.get_subcommands_mut() {
        if sub.is_hide_set() {
            continue;
        }
        let name = sub.get_name().to_string();
        let help = sub.render_long_help().to_string();
        out.push_str(&format!("\n## quirky {name}\n\n```text\n{help}```\n"));
    }
    out
}

pub fn write_docs(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, flag_reference()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}
