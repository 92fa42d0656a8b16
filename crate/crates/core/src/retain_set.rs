//! Generic-knowledge probes with no relation to the forget set, used to
//! measure collateral utility loss.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetainProbe {
    pub id: String,
    /// Topic cluster used for the clustered interval.
    pub topic: String,
    pub question: String,
    pub answer: String,
}

const RETAIN: &[(&str, &str, &str)] = &[
    ("capitals", "What is the capital of France?", "Paris"),
    ("capitals", "What is the capital of Japan?", "Tokyo"),
    ("capitals", "What is the capital of Kenya?", "Nairobi"),
    ("capitals", "What is the capital of Canada?", "Ottawa"),
    ("capitals", "What is the capital of Australia?", "Canberra"),
    ("capitals", "What is the capital of Peru?", "Lima"),
    ("capitals", "What is the capital of Norway?", "Oslo"),
    ("capitals", "What is the capital of Egypt?", "Cairo"),
    ("capitals", "What is the capital of Argentina?", "Buenos Aires"),
    ("capitals", "What is the capital of Vietnam?", "Hanoi"),
    ("capitals", "What is the capital of Poland?", "Warsaw"),
    ("capitals", "What is the capital of Turkey?", "Ankara"),
    ("capitals", "What is the capital of Portugal?", "Lisbon"),
    ("capitals", "What is the capital of Ghana?", "Accra"),
    ("capitals", "What is the capital of Thailand?", "Bangkok"),
    ("chemistry", "What is the chemical symbol for gold?", "Au"),
    ("chemistry", "What is the chemical symbol for sodium?", "Na"),
    ("chemistry", "What is the chemical symbol for iron?", "Fe"),
    ("chemistry", "What is the chemical symbol for chlorine?", "Cl"),
    ("chemistry", "What is the chemical symbol for silver?", "Ag"),
    ("chemistry", "What is the chemical symbol for lead?", "Pb"),
    ("chemistry", "What is the chemical symbol for tin?", "Sn"),
    ("chemistry", "What is the chemical symbol for mercury?", "Hg"),
    ("chemistry", "What is the chemical symbol for copper?", "Cu"),
    ("chemistry", "What is the chemical symbol for helium?", "He"),
    ("chemistry", "What is the chemical symbol for platinum?", "Pt"),
    ("chemistry", "What is the chemical symbol for nickel?", "Ni"),
    ("chemistry", "What is the chemical symbol for neon?", "Ne"),
    ("chemistry", "What is the chemical symbol for zinc?", "Zn"),
    ("chemistry", "What is the chemical symbol for calcium?", "Ca"),
    ("literature", "Who wrote Pride and Prejudice?", "Jane Austen"),
    (
        "literature",
        "Who wrote One Hundred Years of Solitude?",
        "Gabriel Garcia Marquez",
    ),
    ("literature", "Who wrote Things Fall Apart?", "Chinua Achebe"),
    ("literature", "Who wrote Moby-Dick?", "Herman Melville"),
    ("literature", "Who wrote War and Peace?", "Leo Tolstoy"),
    ("literature", "Who wrote The Odyssey?", "Homer"),
    ("literature", "Who wrote Don Quixote?", "Miguel de Cervantes"),
    ("literature", "Who wrote Hamlet?", "William Shakespeare"),
    ("literature", "Who wrote Frankenstein?", "Mary Shelley"),
    ("literature", "Who wrote The Divine Comedy?", "Dante Alighieri"),
    ("literature", "Who wrote Crime and Punishment?", "Fyodor Dostoevsky"),
    ("literature", "Who wrote Beloved?", "Toni Morrison"),
    ("literature", "Who wrote The Tale of Genji?", "Murasaki Shikibu"),
    ("literature", "Who wrote Madame Bovary?", "Gustave Flaubert"),
    ("literature", "Who wrote The Metamorphosis?", "Franz Kafka"),
    ("biology", "What is the largest mammal?", "blue whale"),
    ("biology", "What organ pumps blood through the body?", "heart"),
    (
        "biology",
        "What gas do plants absorb for photosynthesis?",
        "carbon dioxide",
    ),
    ("biology", "What molecule carries genetic information?", "DNA"),
    ("biology", "What is the powerhouse of the cell?", "mitochondria"),
    ("biology", "How many chambers does the human heart have?", "four"),
    ("biology", "What pigment makes plants green?", "chlorophyll"),
    ("biology", "What is the largest organ of the human body?", "skin"),
    ("biology", "What do bees collect from flowers to make honey?", "nectar"),
    ("biology", "What is the basic unit of life?", "cell"),
    ("biology", "Which blood cells fight infection?", "white blood cells"),
    ("biology", "What is the fastest land animal?", "cheetah"),
    ("biology", "What bone protects the brain?", "skull"),
    ("biology", "What process do cells use to divide?", "mitosis"),
    ("biology", "What is the hardest substance in the human body?", "enamel"),
];

pub fn retain_probes() -> Vec<RetainProbe> {
    RETAIN
        .iter()
        .enumerate()
        .map(|(i, (topic, q, a))| RetainProbe {
            id: format!("retain-{i:03}"),
            topic: topic.to_string(),
            question: q.to_string(),
            answer: a.to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_unique_probes() {
        let probes = retain_probes();
        assert_eq!(probes.len(), 60);
        let mut qs: Vec<_> = probes.iter().map(|p| &p.question).collect();
        qs.sort();
        qs.dedup();
        assert_eq!(qs.len(), 60);
    }
}
