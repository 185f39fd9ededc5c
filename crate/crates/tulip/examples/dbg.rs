use tulip::pe::{dump_program, PeState};
use tulip::scheduler::{build_adder_tree, schedule_node};

fn main() {
    'outer: for n in 2..=60usize {
        let tree = build_adder_tree(n).unwrap();
        let schedule = schedule_node(&tree).unwrap();
        for k in 0..200u64 {
            let inputs: Vec<bool> = (0..n).map(|i| (k.wrapping_mul(0x9E3779B97F4A7C15) >> (i % 60)) & 1 == 1).collect();
            let expected = inputs.iter().filter(|&&b| b).count() as u32;
            let end = schedule.run(&PeState::new(), &inputs).unwrap();
            let got = schedule.read_result(&end);
            if got != expected {
                println!("FAIL n={n} k={k} expected={expected} got={got}");
                println!("{}", dump_program(&schedule.program));
                println!("events:");
                for e in &schedule.node_events {
                    println!("  node {} level {} [{}..{}] free {:?} R{}[{}..{}]", e.node_id, e.level, e.started_at, e.completed_at, e.freed_at, e.reg + 1, e.lsb, e.lsb + e.width);
                }
                break 'outer;
            }
        }
        println!("n={n} ok ({} cycles, peak {})", schedule.cycle_count(), schedule.peak_live_bits);
    }
}
