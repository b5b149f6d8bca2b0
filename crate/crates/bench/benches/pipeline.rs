use criterion::{black_box, criterion_group, criterion_main, Criterion};
use gridlink::features::{build_pair_matrices, edit_distance, SimTable, LINK_CAP};
use gridlink::{segment, Linker, LinkerVariant, MatchModel, MatchModelConfig};
use gridlink_bench::fixture;

fn benches(c: &mut Criterion) {
    let fx = fixture(300);
    let text = &fx.data.corpus[0].text;
    let lex = &fx.data.lexicon;

    c.bench_function("segment", |b| b.iter(|| segment(black_box(text), lex)));

    let a: Vec<char> = "钱江3170线开关".chars().collect();
    let z: Vec<char> = "钱塘3710线刀闸".chars().collect();
    c.bench_function("edit_distance", |b| b.iter(|| edit_distance(black_box(&a), black_box(&z))));

    let model = MatchModel::new(MatchModelConfig::default()).expect("default config is valid");
    let tokens = segment(text, lex);
    let entity = fx.data.kg.candidates().next().expect("graph has candidates");
    let e_tokens = segment(&entity.surface, lex);
    let (em, tm) = build_pair_matrices(&tokens, &e_tokens, &fx.tables, &SimTable::default(), LINK_CAP);
    c.bench_function("forward", |b| b.iter(|| model.forward(black_box(&em), black_box(&tm))));

    let linker = Linker::neural(&fx.data.kg, lex.clone(), fx.tables.clone(), &model, LinkerVariant::Full).expect("linker");
    c.bench_function("link_text", |b| b.iter(|| linker.link("t", black_box(text)).expect("non-empty text")));

    let direct = Linker::baseline(&fx.data.kg, lex.clone(), LinkerVariant::WordWise).expect("linker");
    c.bench_function("link_text_wordwise", |b| b.iter(|| direct.link("t", black_box(text)).expect("non-empty text")));
}

criterion_group! {
    name = pipeline;
    config = Criterion::default().sample_size(20);
    targets = benches
}
criterion_main!(pipeline);
