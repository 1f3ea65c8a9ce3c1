use anyhow::Result;
use blunt_core::lincheck::{enumerate_tree, race_prefix, race_workload, TreeConfig};

use crate::config::{binding, write_or_print};
use crate::{TreeArgs, WorkloadArg};

pub fn cmd_tree(args: TreeArgs) -> Result<()> {
    let program = match args.workload {
        WorkloadArg::Race => race_workload(),
    };
    let b = binding(args.object, args.k)?;
    let prefix = if args.race_prefix {
        race_prefix()
    } else {
        Vec::new()
    };
    let t = enumerate_tree(
        &program,
        &[b],
        &prefix,
        TreeConfig {
            depth: args.depth,
            complete: !args.no_complete,
            max_nodes: args.max_nodes,
        },
    )?;
    eprintln!("{} nodes", t.len());
    write_or_print(args.out.as_deref(), &t.to_jsonl())
}
