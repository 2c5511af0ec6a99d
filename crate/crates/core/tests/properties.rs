use std::collections::{BTreeMap, BTreeSet};

use merge_core::evaluation::{pa_curve, PredictionTable, Scored};
use merge_core::lexical::{extract_shared_words, tokenize, BuiltinTagger, Tagger};
use merge_core::scorer::{
    default_vocabulary, MaskFillScorer, ScoredCandidate, ScorerError, SyntheticScorer, TokenScore,
    Vocabulary,
};
use merge_core::stats::{independent_t_test, paired_t_test};
use merge_core::suggestion::{
    position_suggestions, problem_suggestions, word_suggestions_multi_model,
    word_suggestions_one_model, Constraints, SentenceCombination,
};
use merge_core::variant::{build_ablation, build_subsamples, scramble, AblationMode, SubsamplePlan};
use merge_core::{Label, NliProblem, TaggedSentence, WordClass};
use proptest::prelude::*;
use proptest::sample::Index;

const FILLER: [&str; 4] = ["the", "a", "is", "on"];

fn pool(vocab: &Vocabulary) -> Vec<String> {
    vocab
        .words()
        .iter()
        .map(|(w, _)| w.clone())
        .chain(FILLER.iter().map(|s| s.to_string()))
        .collect()
}

fn tagger(vocab: &Vocabulary) -> BuiltinTagger {
    let mut t = BuiltinTagger::new();
    vocab.extend_lexicon(t.lexicon_mut());
    t
}

/// Two sentences over the pool that share the vocabulary word `shared`.
fn sentences(
    words: &[String],
    p: &[usize],
    h: &[usize],
    shared: usize,
    at_p: &[Index],
    at_h: &[Index],
) -> (Vec<String>, Vec<String>) {
    let build = |idx: &[usize], at: &[Index]| {
        let mut s: Vec<String> = idx.iter().map(|&i| words[i % words.len()].clone()).collect();
        for a in at {
            let pos = a.index(s.len() + 1);
            s.insert(pos, words[shared].clone());
        }
        s
    };
    (build(p, at_p), build(h, at_h))
}

fn problem_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize, Vec<Index>, Vec<Index>)> {
    (
        prop::collection::vec(0usize..64, 2..6),
        prop::collection::vec(0usize..64, 2..6),
        0usize..40,
        prop::collection::vec(any::<Index>(), 1..=2),
        prop::collection::vec(any::<Index>(), 1..=2),
    )
}

fn scorers(vocab: &Vocabulary, n: usize) -> Vec<SyntheticScorer> {
    (0..n)
        .map(|i| SyntheticScorer::new(format!("m{i}"), vocab.clone()))
        .collect()
}

fn refs(s: &[SyntheticScorer]) -> Vec<&dyn MaskFillScorer> {
    s.iter().map(|x| x as &dyn MaskFillScorer).collect()
}

/// Offers only vocabulary words whose index has the parity of the position,
/// so occurrences at positions of different parity can never agree.
struct Parity {
    words: Vec<String>,
}

impl MaskFillScorer for Parity {
    fn model_id(&self) -> &str {
        "parity"
    }

    fn fill_mask(&self, _: &[String], position: usize, top_k: usize) -> Result<Vec<ScoredCandidate>, ScorerError> {
        Ok(self
            .words
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == position % 2)
            .take(top_k)
            .enumerate()
            .map(|(rank, (_, w))| ScoredCandidate {
                token: w.clone(),
                probability: 0.5 / (rank + 1) as f64,
                fragment: false,
            })
            .collect())
    }

    fn score_token(&self, _: &[String], _: usize, _: &str) -> Result<TokenScore, ScorerError> {
        Ok(TokenScore::Probability(1e-12))
    }
}

fn set_keys<V>(m: &BTreeMap<String, V>) -> BTreeSet<String> {
    m.keys().cloned().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn adding_a_model_never_shrinks_the_union((p, h, w, ap, ah) in problem_strategy()) {
        let vocab = default_vocabulary();
        let words = pool(&vocab);
        let tg = tagger(&vocab);
        let (ps, _) = sentences(&words, &p, &h, w, &ap, &ah);
        let tp = tg.tag(&ps).unwrap();
        let positions: Vec<usize> = (0..ps.len()).filter(|&i| ps[i] == words[w]).collect();
        prop_assume!(positions.iter().all(|&i| tp.classes[i].is_some()));
        let all = scorers(&vocab, 3);
        let mut previous: Option<BTreeMap<String, BTreeMap<String, f64>>> = None;
        for k in 1..=all.len() {
            let union = word_suggestions_multi_model(&refs(&all[..k]), &tg, &tp, &positions, 200).unwrap();
            if let Some(prev) = &previous {
                for (token, models) in prev {
                    let now = union.get(token);
                    prop_assert!(now.is_some(), "{token} lost when adding model {k}");
                    for (m, prob) in models {
                        prop_assert_eq!(now.unwrap().get(m), Some(prob));
                    }
                }
            }
            let expected: BTreeSet<String> = all[..k]
                .iter()
                .flat_map(|s| set_keys(&word_suggestions_one_model(s, &tg, &tp, &positions, 200).unwrap()))
                .collect();
            prop_assert_eq!(set_keys(&union), expected);
            previous = Some(union);
        }
    }

    #[test]
    fn occurrence_intersection_is_set_intersection((p, h, w, ap, ah) in problem_strategy()) {
        let vocab = default_vocabulary();
        let words = pool(&vocab);
        let tg = tagger(&vocab);
        let (ps, _) = sentences(&words, &p, &h, w, &ap, &ah);
        let tp = tg.tag(&ps).unwrap();
        let positions: Vec<usize> = (0..ps.len()).filter(|&i| ps[i] == words[w]).collect();
        prop_assume!(positions.iter().all(|&i| tp.classes[i].is_some()));
        let scorer = SyntheticScorer::new("m", vocab.clone());
        let per: Vec<BTreeMap<String, f64>> = positions
            .iter()
            .map(|&i| position_suggestions(&scorer, &tg, &tp, i, 200).unwrap())
            .collect();
        let got = word_suggestions_one_model(&scorer, &tg, &tp, &positions, 200).unwrap();
        let mut want: BTreeMap<String, f64> = per[0].clone();
        want.retain(|t, _| per.iter().all(|s| s.contains_key(t)));
        for (t, prob) in want.iter_mut() {
            *prob = per.iter().map(|s| s[t]).fold(f64::INFINITY, f64::min);
        }
        prop_assert_eq!(&got, &want);
        for a in &per {
            for b in &per {
                if a.keys().all(|t| !b.contains_key(t)) {
                    prop_assert!(got.is_empty());
                }
            }
        }
    }

    #[test]
    fn disjoint_occurrences_intersect_to_nothing(
        (p, h, w, ap, ah) in problem_strategy(),
        gap in 1usize..4,
    ) {
        let vocab = default_vocabulary();
        let words = pool(&vocab);
        let tg = tagger(&vocab);
        let (mut ps, _) = sentences(&words, &p, &h, w, &ap[..1], &ah);
        // A second occurrence at odd distance from the first.
        let first = ps.iter().position(|t| *t == words[w]).unwrap();
        let second = (first + 2 * gap - 1).min(ps.len());
        ps.insert(second, words[w].clone());
        let tp = tg.tag(&ps).unwrap();
        let positions: Vec<usize> = (0..ps.len()).filter(|&i| ps[i] == words[w]).collect();
        prop_assume!(positions.iter().any(|&i| i % 2 == 0) && positions.iter().any(|&i| i % 2 == 1));
        prop_assume!(positions.iter().all(|&i| tp.classes[i].is_some()));
        let scorer = Parity { words: vocab.words().iter().map(|(w, _)| w.clone()).collect() };
        let got = word_suggestions_one_model(&scorer, &tg, &tp, &positions, 200).unwrap();
        prop_assert!(got.is_empty(), "{got:?}");
    }

    #[test]
    fn relaxed_modes_contain_standard((p, h, w, ap, ah) in problem_strategy()) {
        let vocab = default_vocabulary();
        let words = pool(&vocab);
        let tg = tagger(&vocab);
        let (ps, hs) = sentences(&words, &p, &h, w, &ap, &ah);
        let (tp, th) = (tg.tag(&ps).unwrap(), tg.tag(&hs).unwrap());
        let all = scorers(&vocab, 2);
        for sw in extract_shared_words(&tp, &th) {
            let set = problem_suggestions(&refs(&all), &tg, "s", &tp, &th, &sw, 200).unwrap();
            let harvest = set.harvest.as_ref().unwrap();
            let of = |c: Constraints, k: SentenceCombination| set_keys(&harvest.select(c, k));
            let standard = set_keys(&set.entries);
            let strict = of(Constraints::STRICT, SentenceCombination::Intersection);
            let pos_only = of(Constraints { probability: false, word_class: true }, SentenceCombination::Intersection);
            let prob_only = of(Constraints { probability: true, word_class: false }, SentenceCombination::Intersection);
            let none = of(Constraints::NONE, SentenceCombination::Intersection);
            let union = of(Constraints::STRICT, SentenceCombination::Union);
            prop_assert_eq!(&standard, &strict);
            prop_assert!(standard.is_subset(&pos_only));
            prop_assert!(pos_only.is_subset(&none));
            prop_assert!(standard.is_subset(&prob_only));
            prop_assert!(prob_only.is_subset(&none));
            prop_assert!(standard.is_subset(&union));
        }
    }

    #[test]
    fn suggestion_sets_survive_json((p, h, w, ap, ah) in problem_strategy()) {
        let vocab = default_vocabulary();
        let words = pool(&vocab);
        let tg = tagger(&vocab);
        let (ps, hs) = sentences(&words, &p, &h, w, &ap, &ah);
        let (tp, th) = (tg.tag(&ps).unwrap(), tg.tag(&hs).unwrap());
        let all = scorers(&vocab, 2);
        for sw in extract_shared_words(&tp, &th) {
            let set = problem_suggestions(&refs(&all), &tg, "s", &tp, &th, &sw, 200).unwrap();
            let json = serde_json::to_string(&set).unwrap();
            prop_assert_eq!(serde_json::from_str::<merge_core::suggestion::SuggestionSet>(&json).unwrap(), set);
        }
    }

    #[test]
    fn shared_words_are_symmetric((p, h, w, ap, ah) in problem_strategy()) {
        let vocab = default_vocabulary();
        let words = pool(&vocab);
        let tg = tagger(&vocab);
        let (ps, hs) = sentences(&words, &p, &h, w, &ap, &ah);
        let (tp, th) = (tg.tag(&ps).unwrap(), tg.tag(&hs).unwrap());
        let forward: BTreeMap<String, (WordClass, Vec<usize>, Vec<usize>)> = extract_shared_words(&tp, &th)
            .into_iter()
            .map(|s| (s.surface, (s.word_class, s.premise_positions, s.hypothesis_positions)))
            .collect();
        let backward: BTreeMap<String, (WordClass, Vec<usize>, Vec<usize>)> = extract_shared_words(&th, &tp)
            .into_iter()
            .map(|s| (s.surface, (s.word_class, s.hypothesis_positions, s.premise_positions)))
            .collect();
        prop_assert_eq!(&forward, &backward);
        for (surface, (class, pp, hp)) in &forward {
            for &i in pp {
                prop_assert_eq!(&tp.tokens[i].to_lowercase(), surface);
                prop_assert_eq!(tp.classes[i], Some(*class));
            }
            for &i in hp {
                prop_assert_eq!(&th.tokens[i].to_lowercase(), surface);
                prop_assert_eq!(th.classes[i], Some(*class));
            }
        }
    }

    #[test]
    fn tokenize_is_idempotent(text in "[A-Za-z,.!?' -]{1,40}") {
        if let Ok(tokens) = tokenize(&text) {
            prop_assert_eq!(tokenize(&tokens.join(" ")).unwrap(), tokens);
        }
    }

    #[test]
    fn scramble_permutes_deterministically(token in "[a-z]{1,12}", seed in any::<u64>(), id in "[a-z0-9]{1,6}") {
        let s = scramble(&token, seed, &id);
        prop_assert_eq!(&s, &scramble(&token, seed, &id));
        let mut a: Vec<char> = token.chars().collect();
        let mut b: Vec<char> = s.chars().collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let distinct: BTreeSet<char> = token.chars().collect();
        if distinct.len() > 1 {
            prop_assert_ne!(s, token);
        }
    }
}

#[derive(Debug, Clone)]
struct Item {
    id: String,
    seed: String,
    gold: Label,
}

impl Scored for Item {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn seed_id(&self) -> &str {
        &self.seed
    }
    fn gold(&self) -> Label {
        self.gold
    }
}

/// Per repeat, per seed: whether each variant is predicted correctly.
fn outcomes() -> impl Strategy<Value = Vec<Vec<Vec<bool>>>> {
    (1usize..5, 1usize..9).prop_flat_map(|(repeats, seeds)| {
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(any::<bool>(), 1..7), seeds..=seeds),
            repeats..=repeats,
        )
    })
}

fn realize(outcomes: &[Vec<Vec<bool>>]) -> (PredictionTable, Vec<Vec<Item>>) {
    let mut labels = BTreeMap::new();
    let mut repeats = Vec::new();
    for (r, seeds) in outcomes.iter().enumerate() {
        let mut items = Vec::new();
        for (s, vs) in seeds.iter().enumerate() {
            for (v, &ok) in vs.iter().enumerate() {
                let id = format!("r{r}s{s}v{v}");
                labels.insert(id.clone(), if ok { Label::Entailment } else { Label::Neutral });
                items.push(Item { id, seed: format!("s{s}"), gold: Label::Entailment });
            }
        }
        repeats.push(items);
    }
    (PredictionTable { model_id: "m".into(), labels }, repeats)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pattern_accuracy_laws(out in outcomes()) {
        let (table, repeats) = realize(&out);
        let grid: Vec<f64> = (0..=20).map(|i| f64::from(i) / 20.0).collect();
        let curve = pa_curve(&table, &repeats, &grid, None).unwrap();
        for (r, seeds) in out.iter().enumerate() {
            let c = &curve.per_repeat[r];
            prop_assert_eq!(c[0], 1.0);
            prop_assert!(c.windows(2).all(|w| w[1] <= w[0]));
            let all_correct = seeds.iter().filter(|vs| vs.iter().all(|&b| b)).count();
            prop_assert_eq!(c[grid.len() - 1], all_correct as f64 / seeds.len() as f64);
            for (i, &x) in grid.iter().enumerate() {
                let passing = seeds
                    .iter()
                    .filter(|vs| vs.iter().filter(|&&b| b).count() as f64 / vs.len() as f64 >= x)
                    .count();
                prop_assert_eq!(c[i], passing as f64 / seeds.len() as f64);
            }
        }
        for i in 0..grid.len() {
            let mean = curve.per_repeat.iter().map(|c| c[i]).sum::<f64>() / out.len() as f64;
            prop_assert_eq!(curve.scores[i], mean);
        }
    }

    #[test]
    fn paired_t_is_antisymmetric_and_scale_free(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..30),
        scale in 0.01f64..100.0,
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(ab) = paired_t_test(&a, &b) {
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assert!((ab.statistic + ba.statistic).abs() <= 1e-9 * ab.statistic.abs().max(1.0));
            prop_assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
            let sa: Vec<f64> = a.iter().map(|x| x * scale).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * scale).collect();
            let scaled = paired_t_test(&sa, &sb).unwrap();
            prop_assert!((scaled.statistic - ab.statistic).abs() <= 1e-7 * ab.statistic.abs().max(1.0));
        }
    }

    #[test]
    fn welch_is_antisymmetric(
        a in prop::collection::vec(-50.0f64..50.0, 2..20),
        b in prop::collection::vec(-50.0f64..50.0, 2..20),
    ) {
        if let Ok(ab) = independent_t_test(&a, &b) {
            let ba = independent_t_test(&b, &a).unwrap();
            prop_assert!((ab.statistic + ba.statistic).abs() <= 1e-9 * ab.statistic.abs().max(1.0));
            prop_assert!((ab.degrees_freedom - ba.degrees_freedom).abs() <= 1e-9 * ab.degrees_freedom);
            prop_assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
            let lo = (a.len().min(b.len()) - 1) as f64;
            prop_assert!(ab.degrees_freedom >= lo - 1e-9);
            prop_assert!(ab.degrees_freedom <= (a.len() + b.len() - 2) as f64 + 1e-9);
        }
    }
}

fn toy_dataset(words_per_seed: &[usize], per_word: &[usize]) -> (BTreeMap<String, NliProblem>, Vec<merge_core::suggestion::SuggestionSet>) {
    use merge_core::suggestion::{CandidateProvenance, SuggestionSet};
    use merge_core::SharedWord;
    let mut seeds = BTreeMap::new();
    let mut sets = Vec::new();
    for (s, &k) in words_per_seed.iter().enumerate() {
        let id = format!("seed{s}");
        let shared: Vec<String> = (0..k).map(|i| format!("w{i}")).collect();
        let p = NliProblem { id: id.clone(), premise: shared.clone(), hypothesis: shared.clone(), label: Label::Neutral };
        for (i, w) in shared.iter().enumerate() {
            let n = per_word[(s + i) % per_word.len()];
            let entries = (0..n)
                .map(|j| {
                    let prov = CandidateProvenance {
                        prob_p: [("m".to_string(), 0.1)].into(),
                        prob_h: [("m".to_string(), 0.1)].into(),
                    };
                    (format!("r{j}x"), prov)
                })
                .collect();
            sets.push(SuggestionSet {
                seed_id: id.clone(),
                shared_word: SharedWord {
                    surface: w.clone(),
                    word_class: WordClass::ALL[i % 3],
                    premise_positions: vec![i],
                    hypothesis_positions: vec![i],
                },
                entries,
                harvest: None,
            });
        }
        seeds.insert(id, p);
    }
    (seeds, sets)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn subsamples_are_deterministic_draws_from_the_pool(
        words in prop::collection::vec(1usize..6, 1..6),
        sizes in prop::collection::vec(0usize..12, 1..5),
        d in 1usize..8,
        seed in any::<u64>(),
    ) {
        let (seeds, sets) = toy_dataset(&words, &sizes);
        let pool = build_ablation(&seeds, &sets, AblationMode::Standard, seed).unwrap();
        let plan = SubsamplePlan::new(d, 3, seed);
        let a = build_subsamples(&pool, &plan).unwrap();
        prop_assert_eq!(&a, &build_subsamples(&pool, &plan).unwrap());
        let ids: BTreeSet<&str> = pool.iter().map(|v| v.id.as_str()).collect();
        for rep in &a.repeats {
            let mut seen = BTreeSet::new();
            for v in rep {
                prop_assert!(ids.contains(v.id.as_str()));
                prop_assert!(seen.insert(v.id.as_str()));
            }
            let mut per_word: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for v in rep {
                *per_word.entry((&v.seed_id, &v.shared_word.surface)).or_default() += 1;
            }
            for set in &sets {
                let got = per_word.get(&(set.seed_id.as_str(), set.shared_word.surface.as_str())).copied().unwrap_or(0);
                prop_assert_eq!(got, d.min(set.len()));
            }
        }
    }
}

#[test]
fn tokenize_then_tag_keeps_length() {
    let tg = BuiltinTagger::new();
    let tokens = tokenize("Two dogs run, and a small girl watches them.").unwrap();
    let tagged: TaggedSentence = tg.tag(&tokens).unwrap();
    assert_eq!(tagged.len(), tokens.len());
}
