//! Template-grammar story generator used for toy training runs and tests.
//!
//! Every story follows the same ordered event schema (goal, action, optional
//! second action, consequence, optional reaction, coda), so sentence order is
//! learnable, and each story shares theme words across its sentences, so
//! bag-of-words similarities vary within a text.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::Document;
use crate::seed::{rng_for, Salt};

struct Theme {
    verb: &'static str,
    past: &'static str,
    obj: &'static str,
    supply: &'static str,
    shop: &'static str,
    finish: &'static str,
}

const fn theme(
    verb: &'static str,
    past: &'static str,
    obj: &'static str,
    supply: &'static str,
    shop: &'static str,
    finish: &'static str,
) -> Theme {
    Theme {
        verb,
        past,
        obj,
        supply,
        shop,
        finish,
    }
}

const THEMES: &[Theme] = &[
    theme("bake", "baked", "cake", "flour and sugar", "bakery", "ate"),
    theme("build", "built", "treehouse", "wood and nails", "hardware store", "painted"),
    theme("plant", "planted", "garden", "seeds and soil", "market", "watered"),
    theme("paint", "painted", "picture", "brushes and paint", "art shop", "framed"),
    theme("fix", "fixed", "bike", "a chain and tools", "repair shop", "rode"),
    theme("write", "wrote", "song", "paper and pens", "bookstore", "sang"),
    theme("sew", "sewed", "dress", "cloth and thread", "fabric store", "wore"),
    theme("cook", "cooked", "soup", "carrots and beans", "grocery store", "served"),
    theme("knit", "knitted", "scarf", "yarn and needles", "craft store", "wore"),
    theme("train", "trained", "puppy", "treats and a leash", "pet store", "walked"),
    theme("catch", "caught", "fish", "bait and hooks", "harbor", "cooked"),
    theme("learn", "learned", "guitar", "strings and books", "music store", "played"),
    theme("carve", "carved", "statue", "a knife and stone", "quarry", "polished"),
    theme("brew", "brewed", "tea", "leaves and honey", "tea house", "drank"),
    theme("design", "designed", "kite", "string and silk", "toy store", "flew"),
    theme("grow", "grew", "pumpkin", "compost and water", "farm", "carved"),
    theme("clean", "cleaned", "attic", "soap and rags", "supermarket", "organized"),
    theme("climb", "climbed", "mountain", "ropes and boots", "outdoor shop", "photographed"),
    theme("win", "won", "race", "shoes and water", "sports shop", "celebrated"),
    theme("read", "read", "novel", "a lamp and glasses", "library", "reviewed"),
];

const NAMES: &[(&str, bool)] = &[
    ("tom", true),
    ("anna", false),
    ("jack", true),
    ("lucy", false),
    ("sam", true),
    ("mia", false),
    ("ben", true),
    ("emma", false),
    ("leo", true),
    ("zoe", false),
    ("max", true),
    ("lily", false),
    ("owen", true),
    ("ruby", false),
    ("finn", true),
    ("nora", false),
    ("eli", true),
    ("ivy", false),
    ("noah", true),
    ("ella", false),
];

const PLACES: &[&str] = &[
    "village", "city", "town", "valley", "forest", "cabin", "farmhouse", "apartment", "island", "suburb", "castle",
    "lighthouse",
];
const ROLES: &[&str] = &["student", "teacher", "nurse", "farmer", "baker", "pilot", "doctor", "writer"];
const TRAITS: &[&str] = &["curious", "shy", "busy", "cheerful", "quiet", "clever", "brave", "lazy"];
const FRIENDS: &[&str] = &["mom", "dad", "grandma", "grandpa", "neighbor", "cousin", "uncle", "aunt"];
const TIMES: &[&str] = &["morning", "evening", "weekend", "afternoon", "night"];
const GOOD: &[&str] = &["happy", "proud", "excited", "relieved", "grateful", "calm"];
const BAD: &[&str] = &["tired", "nervous", "worried", "sad", "bored", "upset"];
const ADJ: &[&str] = &["new", "big", "small", "beautiful", "simple", "perfect", "special", "huge"];

struct Slots<'a> {
    name: &'a str,
    he: &'a str,
    his: &'a str,
    friend: &'a str,
    t: &'a Theme,
    adj: &'a str,
}

fn pick<'a, R: Rng + ?Sized>(xs: &'a [&'a str], rng: &mut R) -> &'a str {
    xs.choose(rng).expect("non-empty list")
}

fn goal<R: Rng + ?Sized>(s: &Slots<'_>, rng: &mut R) -> String {
    let t = s.t;
    match rng.random_range(0..3) {
        0 => format!("{} wanted to {} a {} {} .", s.name, t.verb, s.adj, t.obj),
        1 => format!("{} decided to {} a {} for {} {} .", s.name, t.verb, t.obj, s.his, s.friend),
        _ => format!("one day {} hoped to {} a {} {} .", s.name, t.verb, s.adj, t.obj),
    }
}

fn action<R: Rng + ?Sized>(s: &Slots<'_>, rng: &mut R) -> String {
    let t = s.t;
    match rng.random_range(0..3) {
        0 => format!("{} went to the {} to buy {} .", s.he, t.shop, t.supply),
        1 => format!("{} saved money for {} .", s.he, t.supply),
        _ => format!("{} asked {} {} for {} .", s.he, s.his, s.friend, t.supply),
    }
}

fn second_action<R: Rng + ?Sized>(s: &Slots<'_>, rng: &mut R) -> String {
    let t = s.t;
    match rng.random_range(0..3) {
        0 => format!("{} worked on the {} every {} .", s.he, t.obj, pick(TIMES, rng)),
        1 => format!("{} was {} because the {} was hard .", s.he, pick(BAD, rng), t.obj),
        _ => format!("{} {} helped {} with the {} .", s.his, s.friend, s.name, t.obj),
    }
}

fn consequence<R: Rng + ?Sized>(s: &Slots<'_>, rng: &mut R) -> String {
    let t = s.t;
    match rng.random_range(0..3) {
        0 => format!("then {} finally {} the {} .", s.he, t.past, t.obj),
        1 => format!("then the {} {} was ready .", s.adj, t.obj),
        _ => format!("after that {} {} the {} {} .", s.name, t.past, s.adj, t.obj),
    }
}

fn reaction<R: Rng + ?Sized>(s: &Slots<'_>, rng: &mut R) -> String {
    match rng.random_range(0..3) {
        0 => format!("{} felt very {} .", s.he, pick(GOOD, rng)),
        1 => format!("{} {} was {} too .", s.his, s.friend, pick(GOOD, rng)),
        _ => format!("{} was not {} anymore .", s.he, pick(BAD, rng)),
    }
}

fn coda<R: Rng + ?Sized>(s: &Slots<'_>, rng: &mut R) -> String {
    let t = s.t;
    match rng.random_range(0..3) {
        0 => format!("in the end {} {} the {} with {} {} .", s.he, t.finish, t.obj, s.his, s.friend),
        1 => format!("so {} {} the {} every {} .", s.name, t.finish, t.obj, pick(TIMES, rng)),
        _ => format!("in the end {} was glad to {} the {} .", s.name, t.verb, t.obj),
    }
}

/// One story, deterministic in `(seed, index)`.
pub fn generate_document(seed: u64, index: usize) -> Document {
    let mut rng = rng_for(seed, &[Salt::Str("synth"), Salt::Int(index as u64)]);
    let &(name, male) = NAMES.choose(&mut rng).expect("names");
    let (he, his) = if male { ("he", "his") } else { ("she", "her") };
    let slots = Slots {
        name,
        he,
        his,
        friend: pick(FRIENDS, &mut rng),
        t: THEMES.choose(&mut rng).expect("themes"),
        adj: pick(ADJ, &mut rng),
    };
    let input = if rng.random_bool(0.5) {
        format!("{name} lived in the {} .", pick(PLACES, &mut rng))
    } else {
        format!("{name} was a {} {} .", pick(TRAITS, &mut rng), pick(ROLES, &mut rng))
    };
    // 4 to 6 sentences: the two optional stages are each present or absent.
    let mut sentences = vec![goal(&slots, &mut rng), action(&slots, &mut rng)];
    let extra = rng.random_range(0..3);
    if extra >= 1 {
        sentences.push(second_action(&slots, &mut rng));
    }
    sentences.push(consequence(&slots, &mut rng));
    if extra >= 2 {
        sentences.push(reaction(&slots, &mut rng));
    }
    sentences.push(coda(&slots, &mut rng));
    Document::new(format!("synth-{index}"), input, sentences.join(" "))
}

pub fn generate_corpus(num_docs: usize, seed: u64) -> Vec<Document> {
    (0..num_docs).map(|i| generate_document(seed, i)).collect()
}
