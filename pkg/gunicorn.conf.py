timeout = 600  # 30日分の検出に備えてワーカータイムアウトを600秒に設定
workers = 1    # 類似度テンソルのメモリを抑えるために1ワーカーに制限
threads = 2
worker_class = 'gthread'
keepalive = 5
