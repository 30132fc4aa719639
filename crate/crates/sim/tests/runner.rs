use std::collections::HashMap;
use std::time::Duration;

use smartfridge_broker::{spawn, BrokerConfig, Client};
use smartfridge_core::DatasetSpec;
use smartfridge_sim::{
    default_model, run_device, settings_topic, DetectionEvent, DeviceConfig, RunnerConfig,
    SensorReading,
};
use smartfridge_wire::TopicName;

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn devices_publish_on_their_topics() {
    let broker = spawn("127.0.0.1:0", BrokerConfig::default()).await.unwrap();
    let addr = broker.local_addr();
    let model = default_model(7).unwrap();
    let mut watcher = Client::connect(addr, "watcher").await.unwrap();
    watcher.subscribe("#").await.unwrap();

    let mut handles = Vec::new();
    for (i, id) in ["a", "b"].into_iter().enumerate() {
        let mut rc = RunnerConfig::new(DeviceConfig::new(id, i as u64, &DatasetSpec::default()));
        rc.minutes = Some(5);
        rc.acceleration = f64::INFINITY;
        let model = model.clone();
        handles.push(tokio::spawn(async move { run_device(addr, rc, &model).await.unwrap() }));
    }
    let mut summaries = Vec::new();
    for h in handles {
        summaries.push(h.await.unwrap());
    }
    watcher.ping().await.unwrap();

    let mut by_topic: HashMap<String, Vec<Vec<u8>>> = HashMap::new();
    while let Some(m) = watcher.try_recv() {
        by_topic.entry(m.topic.as_str().to_owned()).or_default().push(m.body.to_vec());
    }
    let mut topics: Vec<_> = by_topic.keys().cloned().collect();
    topics.sort();
    assert_eq!(topics, ["fridge/a/detections", "fridge/a/env", "fridge/b/detections", "fridge/b/env"]);
    for s in &summaries {
        let dets = &by_topic[&format!("fridge/{}/detections", s.device_id)];
        let envs = &by_topic[&format!("fridge/{}/env", s.device_id)];
        assert_eq!(dets.len(), 5);
        assert_eq!(envs.len(), 5);
        let last: DetectionEvent = serde_json::from_slice(dets.last().unwrap()).unwrap();
        assert_eq!(Some(last), s.last_detection);
        let last: SensorReading = serde_json::from_slice(envs.last().unwrap()).unwrap();
        assert_eq!(Some(last), s.last_reading);
    }
    broker.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn settings_reach_the_device() {
    let broker = spawn("127.0.0.1:0", BrokerConfig::default()).await.unwrap();
    let addr = broker.local_addr();
    let model = default_model(7).unwrap();
    let mut watcher = Client::connect(addr, "watcher").await.unwrap();
    watcher.subscribe("fridge/dev/env").await.unwrap();

    let mut rc = RunnerConfig::new(DeviceConfig::new("dev", 3, &model.spec));
    rc.minutes = Some(40);
    rc.acceleration = 60.0 / 0.02;
    let task = tokio::spawn(async move { run_device(addr, rc, &model).await.unwrap() });

    let first = tokio::time::timeout(Duration::from_secs(5), watcher.recv()).await.unwrap().unwrap();
    let first: SensorReading = serde_json::from_slice(&first.body).unwrap();
    assert_eq!(first.temperature_target, 4.0);
    let topic = TopicName::new(settings_topic("dev")).unwrap();
    watcher
        .publish(&topic, r#"{"temperatureTarget": 0.0, "humidityTarget": 55.0}"#)
        .await
        .unwrap();
    watcher.publish(&topic, r#"{"temperatureTarget": 99}"#).await.unwrap();

    let summary = task.await.unwrap();
    assert_eq!(summary.settings_applied, 1);
    assert_eq!(summary.settings_rejected, 1);
    let last = summary.last_reading.unwrap();
    assert_eq!(last.temperature_target, 0.0);
    assert_eq!(last.humidity_target, 55.0);
    broker.shutdown().await;
}
