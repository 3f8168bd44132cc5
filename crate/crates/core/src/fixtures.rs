//! Reference transcript and seeded generators for synthetic discussions.
//!
//! The generators are used by tests, mock backends and benchmarks. They only
//! produce discussions that pass [`validate`](crate::transcript::validate).

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::transcript::{Discussion, Turn, MAX_HUMANS, MIN_HUMANS};

/// The 911 factual-correction discussion in canonical form.
pub const FIG_EXAMPLE: &str = "\
[SCENARIO_SETUP]
Topic: Why is 911, 911? Why can't it be something else?
Context: A group of history enthusiasts and emergency responders discussing the origins of emergency numbers in an online forum.
[/SCENARIO_SETUP]
[DISCUSSION_START]
John: Hey guys, I've always wondered why 911 is the emergency number in the US. Is it just a random choice or is there some historical significance to it?
Emily: I think it's because of the AT&T operators. They chose it because it's easy to remember and pronounce.
Mike: That makes sense, but I've heard it's because of the Titanic. The ship's radio operators used it as a distress signal.
Sarah: That's what I've heard too! It's a pretty cool story. I mean, who wouldn't want to associate their emergency number with a historic tragedy?
[AI_APPEARED]
Nexus: Actually, the origins of 911 are more complex than that. The number was chosen because it was easy to remember and could be easily dialed with a rotary phone. The AT&T operators did play a role, but it wasn't the sole reason. The Federal Communications Commission (FCC) also had a hand in selecting the number.
[/AI_DISAPPEARED]
John: Wow, I didn't know that. So it was a combination of factors, not just one specific event or person.
Emily: Yeah, it's interesting how history can be more nuanced than we think. Thanks for the correction, Nexus!
[/DISCUSSION_END]
";

pub const FIG_TOPIC: &str = "Why is 911, 911? Why can't it be something else?";
pub const FIG_CONTEXT: &str =
    "A group of history enthusiasts and emergency responders discussing the origins of emergency numbers in an online forum.";

const NAMES: &[&str] = &[
    "John", "Emily", "Mike", "Sarah", "Priya", "Tomás", "Aiko", "Olu", "Dr. Chen", "Mary Ann", "Lars", "Fatima",
];

const WORDS: &[&str] = &[
    "the", "number", "was", "chosen", "because", "it", "is", "easy", "to", "remember,", "I", "heard", "that",
    "rotary", "phones", "made", "dialing", "faster.", "really?", "well:", "911", "AT&T", "(FCC)", "history",
    "actually", "think", "so!", "maybe", "not", "quite", "data", "shows", "42%", "source:", "café", "über",
    "\"quoted\"", "it's", "«»", "e.g.", "10:30", "http://example.org",
];

fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=14);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Build a random valid discussion from `seed`.
pub fn random_discussion(seed: u64) -> Discussion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_discussion_with(&mut rng)
}

pub fn random_discussion_with(rng: &mut impl Rng) -> Discussion {
    let humans = rng.random_range(MIN_HUMANS..=MAX_HUMANS);
    discussion_with_humans(rng, humans)
}

/// Random valid discussion with exactly `humans` distinct speakers.
///
/// # Panics
///
/// If `humans` is outside the allowed participant range.
pub fn discussion_with_humans(rng: &mut impl Rng, humans: usize) -> Discussion {
    assert!((MIN_HUMANS..=MAX_HUMANS).contains(&humans), "human count {humans} out of range");
    let mut names: Vec<&str> = NAMES.to_vec();
    names.shuffle(rng);
    names.truncate(humans);
    let pre = rng.random_range(1..=6usize);
    let post = rng.random_range(1..=4usize);
    let mut turns = Vec::with_capacity(pre + post + 1);
    // every chosen speaker appears at least once, the rest are random
    let mut order: Vec<&str> = names.clone();
    while order.len() < pre + post {
        order.push(names.choose(rng).unwrap());
    }
    order.shuffle(rng);
    for (i, name) in order.iter().enumerate() {
        if i == pre {
            turns.push(Turn::nexus(sentence(rng)));
        }
        turns.push(Turn::human(*name, sentence(rng)));
    }
    let scenario_setup = rng.random_bool(0.5).then(|| format!("Topic: {}\nContext: {}", sentence(rng), sentence(rng)));
    Discussion { scenario_setup, turns, source_scenario: None }
}
