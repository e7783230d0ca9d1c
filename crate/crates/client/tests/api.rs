use std::sync::Arc;

use probunk_client::{Client, ClientError};
use probunk_core::corpus::{Answer, Corpus, Problem};
use probunk_core::unknown::SpanInput;
use probunk_service::api::{PutAnnotation, Status};
use probunk_service::{serve_on, AnnotationStore, AppState};
use tokio::net::TcpListener;

fn corpus() -> Corpus {
    let texts = [
        ("p1", "Two dice are rolled. The dice are fair. What is the probability that both show six? Thanks."),
        ("p2", "A coin is tossed. I want to calculate the variance of the count."),
        ("p3", "Arrivals are Poisson. How could one derive the waiting time?"),
        ("p4", "This one makes no sense at all. Really."),
    ];
    let problems = texts
        .iter()
        .map(|(id, t)| Problem::new(*id, *t, ["probability"], format!("a-{id}")).unwrap())
        .collect();
    let answers = texts
        .iter()
        .map(|(id, _)| Answer { id: format!("a-{id}"), problem_id: id.to_string(), text: "ok".into() })
        .collect();
    Corpus::new(problems, answers).unwrap()
}

async fn start(dir: &std::path::Path, name: &str) -> Client {
    let corpus = Arc::new(corpus());
    let store = AnnotationStore::open(&dir.join(name), &corpus).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_on(listener, AppState::new(corpus, store)));
    Client::new(format!("http://{addr}"))
}

fn sentence_span(p: &Problem, j: usize) -> SpanInput {
    let s = &p.sentences[j];
    SpanInput { sentence_index: j, char_start: s.char_start(), char_end: s.char_end() }
}

#[tokio::test]
async fn detail_put_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path(), "j.jsonl").await;
    let d = client.problem("p1").await.unwrap();
    assert_eq!((d.revision, d.status, d.sentences.len()), (0, Status::Unlabeled, 4));
    assert!(d.annotation.is_none());

    let p = corpus().problem("p1").unwrap().clone();
    let r = client
        .put_annotation("p1", &PutAnnotation { spans: vec![sentence_span(&p, 2)], unclear: false, revision: 0 })
        .await
        .unwrap();
    assert_eq!(r.revision, 1);
    assert_eq!(r.annotation.sentence_labels, vec![0, 0, 1, 0]);
    assert_eq!(r.annotation.spans[0].text, "What is the probability that both show six?");
    let d = client.problem("p1").await.unwrap();
    assert_eq!((d.revision, d.status), (1, Status::Labeled));
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path(), "j.jsonl").await;
    assert!(matches!(client.problem("nope").await, Err(ClientError::NotFound(_))));
    let put = PutAnnotation { spans: vec![], unclear: true, revision: 0 };
    assert!(matches!(client.put_annotation("nope", &put).await, Err(ClientError::NotFound(_))));

    let bad = PutAnnotation {
        spans: vec![
            SpanInput { sentence_index: 0, char_start: 0, char_end: 4 },
            SpanInput { sentence_index: 1, char_start: 9, char_end: 9 },
            SpanInput { sentence_index: 0, char_start: 500, char_end: 510 },
        ],
        unclear: false,
        revision: 0,
    };
    match client.put_annotation("p2", &bad).await {
        Err(ClientError::Invalid(e)) => {
            let which: Vec<usize> = e.spans.iter().map(|s| s.span).collect();
            assert_eq!(which, vec![1, 2]);
        }
        other => panic!("{other:?}"),
    }
    let empty = PutAnnotation { spans: vec![], unclear: false, revision: 0 };
    assert!(matches!(client.put_annotation("p2", &empty).await, Err(ClientError::Invalid(_))));
    assert_eq!(client.problem("p2").await.unwrap().revision, 0);
}

#[tokio::test]
async fn unclear_paging_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path(), "j.jsonl").await;
    let r = client
        .put_annotation("p4", &PutAnnotation { spans: vec![], unclear: true, revision: 0 })
        .await
        .unwrap();
    assert!(r.annotation.unclear);
    assert_eq!(r.annotation.sentence_labels, vec![0, 0]);

    let p = client.progress().await.unwrap();
    assert_eq!((p.total, p.labeled, p.unclear, p.unlabeled), (4, 0, 1, 3));

    let unclear = client.list_problems(Some(Status::Unclear), 0, 10).await.unwrap();
    assert_eq!(unclear.items.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["p4"]);
    let page = client.list_problems(Some(Status::Unlabeled), 1, 1).await.unwrap();
    assert_eq!((page.total, page.items.len(), page.items[0].id.as_str()), (3, 1, "p2"));
    let beyond = client.list_problems(None, 40, 10).await.unwrap();
    assert_eq!((beyond.total, beyond.items.len()), (4, 0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writes_on_one_revision_conflict_once() {
    let dir = tempfile::tempdir().unwrap();
    let a = start(dir.path(), "j.jsonl").await;
    let b = a.clone();
    let p = corpus().problem("p1").unwrap().clone();
    for round in 0..10u64 {
        let base = a.problem("p1").await.unwrap().revision;
        assert_eq!(base, round);
        let ra = PutAnnotation { spans: vec![sentence_span(&p, 2)], unclear: false, revision: base };
        let rb = PutAnnotation { spans: vec![sentence_span(&p, 0)], unclear: false, revision: base };
        let (x, y) = tokio::join!(a.put_annotation("p1", &ra), b.put_annotation("p1", &rb));
        let ok = [x.is_ok(), y.is_ok()];
        assert_eq!(ok.iter().filter(|&&o| o).count(), 1, "round {round}");
        let err = if x.is_ok() { y.unwrap_err() } else { x.unwrap_err() };
        assert!(matches!(err, ClientError::Conflict(_)));
        assert_eq!(err.current_revision(), Some(base + 1));
    }
}

#[tokio::test]
async fn export_import_reexport_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = start(dir.path(), "a.jsonl").await;
    assert_eq!(first.export().await.unwrap(), "");
    let c = corpus();
    let p1 = c.problem("p1").unwrap();
    let p3 = c.problem("p3").unwrap();
    first
        .put_annotation("p3", &PutAnnotation { spans: vec![sentence_span(p3, 1)], unclear: false, revision: 0 })
        .await
        .unwrap();
    let within = SpanInput { sentence_index: 2, char_start: p1.sentences[2].char_start() + 8, char_end: p1.sentences[2].char_end() - 1 };
    first
        .put_annotation("p1", &PutAnnotation { spans: vec![within, sentence_span(p1, 0)], unclear: false, revision: 0 })
        .await
        .unwrap();
    first.put_annotation("p4", &PutAnnotation { spans: vec![], unclear: true, revision: 0 }).await.unwrap();
    let export = first.export().await.unwrap();
    assert_eq!(export.lines().count(), 3);
    assert!(export.starts_with("{\"problem_id\":\"p1\""));

    let second = start(dir.path(), "b.jsonl").await;
    let s = second.import(&export).await.unwrap();
    assert_eq!((s.imported, s.unchanged), (3, 0));
    assert_eq!(second.export().await.unwrap(), export);
    assert_eq!(second.progress().await.unwrap().unclear, 1);

    assert!(matches!(second.import("{\"problem_id\":\"zz\"}\n").await, Err(ClientError::Invalid(_) | ClientError::NotFound(_))));
}
