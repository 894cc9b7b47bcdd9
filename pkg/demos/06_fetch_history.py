"""
Paging through a candle history endpoint
========================================

The client asks for at most 2000 candles per request and walks backwards by
end timestamp. Here a local stand-in plays the server, so nothing touches the
network; pass no ``get`` to use HTTP via requests.
"""
from candlecast.market_data import HistoryEndpoint, fetch_history, parse_timestamp, validate_series, write_csv

H = 3600
start = parse_timestamp("2019-01-01T00:00:00Z")
end = start + 4500 * H
calls = []


def fake_server(url, params):
    calls.append(params["limit"])
    stop = params["toTs"]
    rows = []
    for i in range(params["limit"]):
        t = stop - i * H
        price = 3500.0 + (t - start) / H * 0.1
        rows.append({"time": t, "open": price, "high": price + 5, "low": price - 5, "close": price + 1, "volumefrom": 1.0})
    return {"Response": "Success", "Data": {"Data": rows[::-1]}}


series = fetch_history(HistoryEndpoint(), "BTC/USDT", H, (start, end), get=fake_server)
print("requests:", calls)
print("candles:", len(series), "first", series[0].timestamp, "last", series[-1].timestamp)
print("clean:", validate_series(series).ok)
print(write_csv(series[:3]))
