use std::fmt::Write as _;
use std::path::Path;

use crate::catalog::{bind_case, expand_catalog, Catalog, CaseOptions, ConcreteCase, Scheduling, VulnPattern};
use crate::error::{Error, Result};
use crate::machine::{AddressClass, MachineConfig, MemOp, StepBinding, DEFAULT_REP};
use crate::cache::PRIME_REPETITIONS;

const READ_ASM: [&str; 5] = ["DSB SY", "ISB", "LDR %0, [%1]", "DSB SY", "ISB"];
const WRITE_ASM: [&str; 5] = ["DSB SY", "ISB", "STR %0, [%1]", "DSB SY", "ISB"];
const FLUSH_ASM: [&str; 5] = ["DSB ISH", "ISB", "DC CIVAC, %0", "DSB ISH", "ISB"];

const PIN_STUB: &str = r#"
/* pinning stub; core isolation on the device is up to the integrator */
static void pin_to_core(int core) {
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(core, &set);
    sched_setaffinity(0, sizeof(set), &set);
}

"#;

const MAIN_HEAD: &str = r#"static uint64_t elapsed_ns(const struct timespec *a, const struct timespec *b) {
    return (uint64_t)(b->tv_sec - a->tv_sec) * 1000000000u + (uint64_t)(b->tv_nsec - a->tv_nsec);
}

int main(int argc, char **argv) {
    int secret = argc > 1 ? atoi(argv[1]) : 0;
    const uint64_t *u_off = secret == 1 ? off_alias : secret == 2 ? off_nib : off_a;
    struct timespec t0, t1;
    for (uint64_t i = 0; i < sizeof(buffer); i += 64) buffer[i] = 1;
    for (int t = 0; t < TRIALS; t++) {
"#;

const MAIN_TAIL: &str = r#"        clock_gettime(CLOCK_MONOTONIC, &t0);
        step3(u_off);
        clock_gettime(CLOCK_MONOTONIC, &t1);
        printf("%d,%llu\n", t, (unsigned long long)elapsed_ns(&t0, &t1));
    }
    return 0;
}
"#;

pub struct NativeCase<'a> {
    pub pattern: &'a VulnPattern,
    pub case: &'a ConcreteCase,
}

pub fn native_file_name(case: &ConcreteCase) -> String {
    format!("case_{:04}.c", case.case_id)
}

fn asm_block(lines: &[&str], operands: &str) -> String {
    let body: Vec<String> = lines.iter().map(|l| format!("\"{l}\\n\\t\"")).collect();
    format!("asm volatile({} {});", body.join(" "), operands)
}

fn op_block(op: MemOp) -> String {
    match op {
        MemOp::Read => asm_block(&READ_ASM, ": \"=r\"(tmp) : \"r\"(p) : \"memory\""),
        MemOp::Write | MemOp::RemoteWrite => {
            asm_block(&WRITE_ASM, ": : \"r\"(val), \"r\"(p) : \"memory\"")
        }
        MemOp::Flush => asm_block(&FLUSH_ASM, ": : \"r\"(p) : \"memory\""),
    }
}

fn offsets(name: &str, v: &[u64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("0x{x:x}")).collect();
    let n = v.len().max(1);
    let items = if items.is_empty() { "0".to_string() } else { items.join(", ") };
    format!("static const uint64_t {name}[{n}] __attribute__((unused)) = {{ {items} }};\n")
}

fn class_loop(class: AddressClass) -> (&'static str, &'static str) {
    match class {
        AddressClass::U => ("LANES", "u_off[i]"),
        AddressClass::A => ("LANES", "off_a[i]"),
        AddressClass::AAlias => ("LANES", "off_alias[i]"),
        AddressClass::Nib => ("LANES", "off_nib[i]"),
        AddressClass::EvictionSet => ("N_EVICT", "off_evict[i]"),
    }
}

fn step_fn(idx: usize, s: &StepBinding, timed: bool) -> String {
    let (bound, expr) = class_loop(s.class);
    let mut out = String::new();
    let reps = if timed { 1 } else { PRIME_REPETITIONS };
    let remote = if s.op == MemOp::RemoteWrite { " (remote write)" } else { "" };
    writeln!(out, "/* step {idx}: {:?} {:?} on core {}{remote} */", s.actor, s.op, s.core).unwrap();
    writeln!(out, "static void step{idx}(const uint64_t *u_off) {{").unwrap();
    writeln!(out, "    uint64_t tmp = 0, val = 1;").unwrap();
    writeln!(out, "    (void)tmp; (void)val; (void)u_off;").unwrap();
    writeln!(out, "    pin_to_core({});", s.core).unwrap();
    writeln!(out, "    for (int r = 0; r < {reps}; r++) {{").unwrap();
    writeln!(out, "        for (int i = 0; i < {bound}; i++) {{").unwrap();
    writeln!(out, "            uint8_t *p = buffer + {expr};").unwrap();
    writeln!(out, "            {}", op_block(s.op)).unwrap();
    writeln!(out, "        }}").unwrap();
    writeln!(out, "    }}").unwrap();
    writeln!(out, "}}").unwrap();
    out
}

/// C source with inline AArch64 assembly for one case. The text is never
/// compiled here; it is byte-stable for a given case and machine.
pub fn emit_native_case(cfg: &MachineConfig, nc: &NativeCase) -> Result<String> {
    let (p, case) = (nc.pattern, nc.case);
    let seq = bind_case(cfg, p, case, None, DEFAULT_REP)?;
    let plan = &seq.plan;
    let lanes = plan.lanes();
    let a: Vec<u64> = lanes.iter().map(|l| l.a).collect();
    let alias: Vec<u64> = lanes.iter().map(|l| l.a_alias).collect();
    let nib: Vec<u64> = lanes.iter().map(|l| l.nib).collect();
    let evict: Vec<u64> = lanes.iter().flat_map(|l| l.eviction.iter().copied()).collect();
    let max = a.iter().chain(&alias).chain(&nib).chain(&evict).copied().max().unwrap_or(0);
    let buf = max + plan.geometry().line_size();
    let sched = match case.scheduling {
        Scheduling::TimeSliced => "time-sliced",
        Scheduling::MultiThreaded => "multi-threaded",
    };

    let mut s = String::new();
    writeln!(s, "/* case {}: pattern {} {} ({}{})", case.case_id, p.id, p.notation(), p.label(),
        p.name.as_deref().map(|n| format!(", {n}")).unwrap_or_default()).unwrap();
    writeln!(s, " * ops {}, {sched}", case.ops_label()).unwrap();
    writeln!(s, " * assumed L1 {}, {} lanes", plan.geometry(), lanes.len()).unwrap();
    writeln!(s, " * usage: ./case <secret>   secret 0 = a, 1 = a_alias, 2 = NIB */").unwrap();
    s.push_str(
        "#define _GNU_SOURCE\n#include <sched.h>\n#include <stdint.h>\n#include <stdio.h>\n#include <stdlib.h>\n#include <time.h>\n\n",
    );
    writeln!(s, "#define LANES {}", lanes.len()).unwrap();
    writeln!(s, "#define N_EVICT {}", evict.len()).unwrap();
    writeln!(s, "#define TRIALS 1000\n").unwrap();
    writeln!(s, "static uint8_t buffer[{buf}] __attribute__((aligned(4096)));\n").unwrap();
    s.push_str(&offsets("off_a", &a));
    s.push_str(&offsets("off_alias", &alias));
    s.push_str(&offsets("off_nib", &nib));
    s.push_str(&offsets("off_evict", &evict));
    s.push_str(PIN_STUB);
    let mut present = Vec::new();
    for (i, st) in seq.steps.iter().enumerate() {
        if let Some(b) = st {
            s.push_str(&step_fn(i + 1, b, i == 2));
            s.push('\n');
            present.push(i + 1);
        } else {
            writeln!(s, "/* step {}: any state */\n", i + 1).unwrap();
        }
    }
    s.push_str(MAIN_HEAD);
    for i in present.iter().filter(|&&i| i < 3) {
        writeln!(s, "        step{i}(u_off);").unwrap();
    }
    s.push_str(MAIN_TAIL);
    Ok(s)
}

/// Write one source file per expanded case; returns the file count.
pub fn emit_catalog(cfg: &MachineConfig, catalog: &Catalog, opts: CaseOptions, dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cases = expand_catalog(catalog, opts);
    for c in &cases {
        let p = catalog
            .get(c.pattern_id)
            .ok_or_else(|| Error::Config(format!("case {} has no pattern", c.case_id)))?;
        let text = emit_native_case(cfg, &NativeCase { pattern: p, case: c })?;
        let path = dir.join(native_file_name(c));
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(cases.len())
}
