# wsgi.py
import os

from app import create_app

# Flaskアプリケーションのインスタンスを作成
app = create_app(os.getenv('FLASK_CONFIG', 'production'))
