//! Single-process runs of the synthetic graphs: digest determinism,
//! variable-rate pruning counters, multi-source joins and the
//! latency-feedback decomposition.

use edgeprune_core::runtime::{run_local, RunOptions};
use edgeprune_core::synthetic;

fn opts(frames: u64) -> RunOptions {
    RunOptions {
        frames: Some(frames),
        run_timeout: Some(std::time::Duration::from_secs(60)),
        ..RunOptions::default()
    }
}

fn terminal_digest(stats: &edgeprune_core::runtime::RunStats, actor: &str) -> String {
    stats
        .actor_report(actor)
        .and_then(|r| r["digest"].as_str())
        .expect("terminal actor reports a digest")
        .to_string()
}

#[test]
fn classification_digest_is_reproducible_and_seed_sensitive() {
    let graph = |seed| {
        synthetic::vehicle_classification_graph(synthetic::VclassOptions {
            frames: 4,
            seed,
            source_work_ms: 0.0,
        })
    };

    let first = run_local(&graph(7), &opts(4)).unwrap();
    let second = run_local(&graph(7), &opts(4)).unwrap();
    let other = run_local(&graph(8), &opts(4)).unwrap();

    assert!(!first.failed, "{:?}", first.errors);
    let digest = terminal_digest(&first, "l4l5");
    assert_eq!(digest.len(), 16);
    assert_eq!(digest, terminal_digest(&second, "l4l5"));
    assert_ne!(digest, terminal_digest(&other, "l4l5"));

    assert_eq!(first.frames_processed, 4);
    assert_eq!(first.endpoint_times_ms().len(), 4);
    assert!(first.roundtrip_times_ms().is_empty());
    assert_eq!(first.actors.len(), 5);
    for (id, actor) in &first.actors {
        assert_eq!(actor.firings, 4, "actor {id}");
    }
    assert_eq!(first.edges.len(), 4);
    for (id, edge) in &first.edges {
        assert_eq!(edge.counters.produced, 4, "edge {id}");
        assert_eq!(edge.counters.consumed, 4, "edge {id}");
        assert_eq!(edge.counters.drained, 0, "edge {id}");
    }
}

#[test]
fn pruned_pipeline_moves_exactly_the_scheduled_tokens() {
    // Six frames against the rate pattern [2, 0, 1] walked twice: the
    // inner edges carry 2+0+1 tokens per cycle while the outer edges stay
    // at one token per frame.
    let graph = synthetic::pruned_pipeline_graph(6, 3, &[2, 0, 1]);
    let stats = run_local(&graph, &opts(6)).unwrap();
    assert!(!stats.failed, "{:?}", stats.errors);
    assert_eq!(stats.frames_processed, 6);

    for id in ["e_src", "e_sink", "e_a", "e_b"] {
        let edge = &stats.edges[id].counters;
        assert_eq!(edge.produced, 6, "edge {id}");
        assert_eq!(edge.consumed, 6, "edge {id}");
        assert_eq!(edge.drained, 0, "edge {id}");
    }

    // Each group member consumes one rate token per frame plus the one it
    // pops while discovering the end of the stream. The control actor is
    // not frame-gated, so it runs a firing or two ahead before its
    // consumers disappear; capacity bounds the overshoot per edge.
    for id in ["c_in", "c_work", "c_out"] {
        let edge = &stats.edges[id].counters;
        assert_eq!(edge.consumed, 7, "edge {id}");
        assert!((7..=8).contains(&edge.produced), "edge {id}: {edge:?}");
    }
    for id in ["src", "da_in", "work", "da_out", "sink"] {
        assert_eq!(stats.actors[id].firings, 6, "actor {id}");
    }
    assert!(stats.actors["ca"].firings >= 7, "{:?}", stats.actors["ca"]);
}

#[test]
fn an_all_zero_pattern_starves_the_group_but_still_terminates() {
    // Every frame is pruned: nothing crosses the inner edges and the
    // collapse stage fires on empty input, regenerating one sink token per
    // frame. The stream end must still reach actors whose pops are all
    // zero-sized, or the group would spin on control tokens forever.
    let graph = synthetic::pruned_pipeline_graph(4, 11, &[0]);
    let stats = run_local(&graph, &opts(4)).unwrap();
    assert!(!stats.failed, "{:?}", stats.errors);
    assert_eq!(stats.frames_processed, 4);
    assert_eq!(stats.edges["e_src"].counters.consumed, 4);
    assert_eq!(stats.edges["e_a"].counters.produced, 0);
    assert_eq!(stats.edges["e_b"].counters.consumed, 0);
    // The collapse stage learns of the end through its empty pops a few
    // control tokens late, so the sink may see a short tail of regenerated
    // tokens past the real frames.
    let sunk = stats.edges["e_sink"].counters.consumed;
    assert!(sunk >= 4, "e_sink consumed {sunk}");
    assert_eq!(stats.actors["sink"].firings, sunk);
}

#[test]
fn dual_source_join_lines_up_both_branches() {
    let graph = synthetic::dual_input_graph(3, 5);
    let stats = run_local(&graph, &opts(3)).unwrap();
    assert!(!stats.failed, "{:?}", stats.errors);
    assert_eq!(stats.frames_processed, 3);
    assert_eq!(stats.frames.len(), 3);
    assert!(stats.actor_report("head").is_some());
    for id in ["e_cam0", "e_cam1", "e_br0", "e_br1", "e_join"] {
        let edge = &stats.edges[id].counters;
        assert_eq!(edge.produced, 3, "edge {id}");
        assert_eq!(edge.consumed, 3, "edge {id}");
    }
}

#[test]
fn feedback_loop_measures_per_frame_round_trips() {
    // src works 9 ms, the stages 20 and 30 ms; with the loop closed each
    // frame owns the pipeline, so both the endpoint latency and the round
    // trip sit at or above the 59 ms compute floor.
    let graph = synthetic::feedback_chain_graph(4, 9);
    let run = RunOptions { latency_feedback: true, ..opts(4) };
    let stats = run_local(&graph, &run).unwrap();
    assert!(!stats.failed, "{:?}", stats.errors);

    let endpoint = stats.endpoint_times_ms();
    let roundtrip = stats.roundtrip_times_ms();
    assert_eq!(endpoint.len(), 4);
    assert_eq!(roundtrip.len(), 4);
    for (k, (e, r)) in endpoint.iter().zip(&roundtrip).enumerate() {
        assert!(*e >= 58.5, "frame {k}: endpoint {e} ms");
        assert!(*r >= *e, "frame {k}: roundtrip {r} ms under endpoint {e} ms");
        assert!(*r < 2_000.0, "frame {k}: roundtrip {r} ms");
    }

    let fb = &stats.edges["__fb"].counters;
    assert_eq!(fb.produced, 4);
    assert_eq!(fb.consumed, 5);
}
