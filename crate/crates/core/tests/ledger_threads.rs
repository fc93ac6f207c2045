use std::collections::HashSet;
use std::thread;

use maskbond::ledger::{inspect, mam_fetch, Ledger, MamChannel, MamMode, Snapshot};

const THREADS: usize = 8;
const PER_THREAD: usize = 1_250;

fn channel(t: usize) -> MamChannel {
    let mode = [MamMode::Public, MamMode::Private, MamMode::Restricted][t % 3];
    let key = (mode == MamMode::Restricted).then(|| format!("key-{t}").into_bytes());
    MamChannel::from_label(mode, &format!("publisher/{t}"), key).unwrap()
}

#[test]
fn eight_publishers_ten_thousand_appends() {
    let ledger = Ledger::new(17);
    thread::scope(|s| {
        for t in 0..THREADS {
            let ledger = ledger.clone();
            s.spawn(move || {
                let mut ch = channel(t);
                for k in 0..PER_THREAD {
                    if k % 2 == 0 {
                        ledger.publish(&mut ch, format!("{t}:{k}").as_bytes()).unwrap();
                    } else {
                        ledger.append(format!("raw {t}:{k}").into_bytes(), None).unwrap();
                    }
                }
            });
        }
    });

    let tangle = ledger.read();
    assert_eq!(tangle.len(), THREADS * PER_THREAD + 1);
    let report = tangle.verify();
    assert!(report.is_clean(), "{report:?}");
    assert!(tangle.tip_count() >= 1);

    let ids: HashSet<_> = tangle.transactions().map(|tx| tx.id).collect();
    assert_eq!(ids.len(), tangle.len());

    for t in 0..THREADS {
        let ch = channel(t);
        let got = mam_fetch(&tangle, &ch.address(), ch.mode(), Some(&ch.keys()));
        let want: Vec<Vec<u8>> = (0..PER_THREAD).step_by(2).map(|k| format!("{t}:{k}").into_bytes()).collect();
        assert_eq!(got.into_iter().map(|m| m.body).collect::<Vec<_>>(), want, "publisher {t}");
        if ch.mode() == MamMode::Restricted {
            let wrong = MamChannel::from_label(MamMode::Restricted, &format!("publisher/{t}"), Some(b"guess".to_vec())).unwrap();
            assert!(mam_fetch(&tangle, &ch.address(), MamMode::Restricted, Some(&wrong.keys())).is_empty());
            assert!(mam_fetch(&tangle, &ch.address(), MamMode::Restricted, None).is_empty());
        }
    }
    assert!(inspect(&Snapshot::of(&tangle)).violations.is_empty());
}
