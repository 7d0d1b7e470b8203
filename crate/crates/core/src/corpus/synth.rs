use serde::{Deserialize, Serialize};

use super::{Annotation, Dialogue};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const DEFAULT_ACTIVITIES: [&str; 6] = ["download", "install", "remove", "upgrade", "configure", "fix"];

pub const DEFAULT_ENTITIES: [&str; 50] = [
    "firefox", "ubuntu", "thunderbird", "vlc", "gimp", "xchat", "pidgin", "apache2", "mysql", "nginx",
    "python", "java", "gcc", "grub", "xorg", "nvidia", "alsa", "pulseaudio", "samba", "openssh",
    "wine", "virtualbox", "chromium", "libreoffice", "gedit", "vim", "emacs", "git", "docker", "postgresql",
    "php", "nautilus", "compiz", "gnome", "kde", "xfce", "unity", "networkmanager", "cups", "bluez",
    "flashplugin", "skype", "dropbox", "steam", "eclipse", "netbeans", "mono", "ruby", "nodejs", "synaptic",
];

/// Neutral words for follow-up chatter; disjoint from the activity and
/// entity pools.
pub const FILLER_WORDS: [&str; 40] = [
    "the", "screen", "shows", "some", "weird", "message", "after", "reboot", "and", "nothing",
    "happens", "when", "i", "click", "it", "still", "does", "not", "work", "my",
    "laptop", "old", "new", "yesterday", "today", "error", "window", "freezes", "sound", "boot",
    "slow", "logs", "say", "something", "about", "permissions", "disk", "space", "network", "menu",
];

const QUESTION_OPENERS: [&str; 3] = [
    "how do i {a} {e} ?",
    "what is the right way to {a} {e} ?",
    "hi , how can i {a} {e} on this machine ?",
];

const COMPLAINT_OPENERS: [&str; 3] = [
    "i tried to {a} {e} and it does not work",
    "hey , {a} {e} fails with an error",
    "help , cannot {a} {e} at all",
];

/// Specific helper replies; each names the activity and the entity. First
/// words are pairwise distinct.
const HELPER_REPLIES: [&str; 6] = [
    "you should {a} {e} with sudo apt-get",
    "try to {a} {e} from the terminal",
    "first {a} {e} and then reboot",
    "just {a} {e} using the package manager",
    "did you {a} {e} as root ?",
    "maybe {a} {e} again after a reboot",
];

const GENERIC_REPLY: &str = "can you paste the exact error message ?";

/// Parameters of the synthetic help-desk corpus.
///
/// Every dialogue alternates user and helper turns, starting with a user
/// request naming one activity and one entity. Follow-up user turns are
/// filler chatter that may switch the entity under discussion
/// (`switch_prob`) without naming an activity. Helper turns answer the
/// current (activity, entity). In unambiguous dialogues (opened with a
/// question) the reply template is fixed by turn position; in ambiguous
/// ones (opened with a complaint) it is drawn at random, and with
/// probability `generic_weight` the helper gives a content-free reply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dialogues: usize,
    pub activities: Vec<String>,
    pub entities: Vec<String>,
    pub ambiguity: f64,
    pub turns: usize,
    pub generic_weight: f64,
    pub switch_prob: f64,
    pub filler_min: usize,
    pub filler_max: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dialogues: 2000,
            activities: DEFAULT_ACTIVITIES.iter().map(|s| s.to_string()).collect(),
            entities: DEFAULT_ENTITIES.iter().map(|s| s.to_string()).collect(),
            ambiguity: 0.4,
            turns: 6,
            generic_weight: 0.25,
            switch_prob: 0.3,
            filler_min: 8,
            filler_max: 16,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn with_entity_pool(mut self, size: usize) -> Self {
        self.entities = DEFAULT_ENTITIES.iter().take(size).map(|s| s.to_string()).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synth spec: {m}")));
        if self.activities.is_empty() || self.entities.is_empty() {
            return bad("activity and entity pools must be nonempty");
        }
        for (name, p) in [("ambiguity", self.ambiguity), ("generic_weight", self.generic_weight), ("switch_prob", self.switch_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.turns < 2 {
            return bad("dialogues need at least 2 turns");
        }
        if self.filler_min == 0 || self.filler_min > self.filler_max {
            return bad("filler length range must satisfy 1 <= min <= max");
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`]: the dialogues plus, per dialogue,
/// whether its helper turns were drawn from several valid replies.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub dialogues: Vec<Dialogue>,
    pub ambiguous: Vec<bool>,
}

fn fill(template: &str, activity: &str, entity: &str) -> String {
    template.replace("{a}", activity).replace("{e}", entity)
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut dialogues = Vec::with_capacity(spec.dialogues);
    let mut ambiguous = Vec::with_capacity(spec.dialogues);
    for n in 0..spec.dialogues {
        let mut rng = RngStream::derive(spec.seed, n as u64);
        let activity = rng.choose(&spec.activities).clone();
        let mut entity = rng.choose(&spec.entities).clone();
        let amb = rng.uniform() < spec.ambiguity;

        let mut turns = Vec::with_capacity(spec.turns);
        let mut notes = Vec::with_capacity(spec.turns);
        let openers = if amb { &COMPLAINT_OPENERS } else { &QUESTION_OPENERS };
        turns.push(fill(rng.choose(openers), &activity, &entity));
        notes.push(Some(Annotation { activity: activity.clone(), entity: entity.clone() }));

        for t in 1..spec.turns {
            if t % 2 == 1 {
                let helper_index = t / 2;
                let reply = if !amb {
                    Some(HELPER_REPLIES[helper_index % HELPER_REPLIES.len()])
                } else if rng.uniform() < spec.generic_weight {
                    None
                } else {
                    Some(*rng.choose(&HELPER_REPLIES))
                };
                match reply {
                    Some(tpl) => {
                        turns.push(fill(tpl, &activity, &entity));
                        notes.push(Some(Annotation { activity: activity.clone(), entity: entity.clone() }));
                    }
                    None => {
                        turns.push(GENERIC_REPLY.to_string());
                        notes.push(None);
                    }
                }
            } else {
                let len = spec.filler_min + rng.below(spec.filler_max - spec.filler_min + 1);
                let mut words: Vec<&str> = (0..len).map(|_| *rng.choose(&FILLER_WORDS)).collect();
                if spec.entities.len() > 1 && rng.uniform() < spec.switch_prob {
                    let others: Vec<&String> = spec.entities.iter().filter(|e| **e != entity).collect();
                    entity = (*rng.choose(&others)).clone();
                    words.extend([",", "now", entity.as_str(), "is", "broken", "too"]);
                }
                turns.push(words.join(" "));
                notes.push(None);
            }
        }
        dialogues.push(Dialogue { id: format!("synth-{n:06}"), turns, annotations: Some(notes) });
        ambiguous.push(amb);
    }
    Ok(SyntheticCorpus { dialogues, ambiguous })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::{tokenize, write_corpus};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec { dialogues: 200, seed, ..SynthSpec::default() }
    }

    #[test]
    fn deterministic_bytes() {
        let bytes = |s: &SynthSpec| {
            let mut buf = Vec::new();
            write_corpus(&generate_synthetic(s).unwrap().dialogues, &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(&small(7)), bytes(&small(7)));
        assert_ne!(bytes(&small(7)), bytes(&small(8)));
    }

    #[test]
    fn no_ambiguity_means_one_response_per_context() {
        let spec = SynthSpec { ambiguity: 0.0, switch_prob: 0.0, ..small(3) };
        let corpus = generate_synthetic(&spec).unwrap();
        let mut seen: std::collections::HashMap<(String, String, usize), String> = Default::default();
        for d in &corpus.dialogues {
            let first = d.annotations.as_ref().unwrap()[0].clone().unwrap();
            for t in (1..d.turns.len()).step_by(2) {
                let key = (first.activity.clone(), first.entity.clone(), t);
                let prev = seen.entry(key).or_insert_with(|| d.turns[t].clone());
                assert_eq!(prev, &d.turns[t]);
            }
        }
        assert!(corpus.ambiguous.iter().all(|a| !a));
    }

    #[test]
    fn annotations_appear_verbatim() {
        let corpus = generate_synthetic(&small(11)).unwrap();
        for d in &corpus.dialogues {
            d.validate().unwrap();
            for (turn, note) in d.turns.iter().zip(d.annotations.as_ref().unwrap()) {
                if let Some(a) = note {
                    let toks = tokenize(turn);
                    assert!(toks.contains(&a.activity) && toks.contains(&a.entity), "{turn}");
                }
            }
        }
    }

    #[test]
    fn fillers_avoid_lexicons() {
        let lex: HashSet<&str> = DEFAULT_ACTIVITIES.iter().chain(DEFAULT_ENTITIES.iter()).copied().collect();
        assert!(FILLER_WORDS.iter().all(|w| !lex.contains(w)));
        for tpl in HELPER_REPLIES.iter().chain(QUESTION_OPENERS.iter()).chain(COMPLAINT_OPENERS.iter()).chain([&GENERIC_REPLY]) {
            assert!(tokenize(tpl).iter().all(|w| !lex.contains(w.as_str())), "{tpl}");
        }
        let firsts: HashSet<String> = HELPER_REPLIES.iter().map(|t| tokenize(t)[0].clone()).collect();
        assert_eq!(firsts.len(), HELPER_REPLIES.len());
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(&SynthSpec { ambiguity: 1.5, ..small(1) }).is_err());
        assert!(generate_synthetic(&SynthSpec { entities: vec![], ..small(1) }).is_err());
        assert!(generate_synthetic(&SynthSpec { turns: 1, ..small(1) }).is_err());
    }
}
